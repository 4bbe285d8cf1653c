#pragma once

// Observation ingestion (CSV / JSONL), calendar-date conversion and a
// synthetic presence-only world with known ground truth.

#include "json.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "geoprior/encoder.hpp"
#include "geoprior/error.hpp"
#include "geoprior/geo.hpp"
#include "geoprior/rng.hpp"

namespace geoprior {

// Dense ids assigned by first appearance.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(const std::vector<std::string>& names) {
    for (const auto& n : names) add(n);
  }

  std::size_t add(const std::string& name) {
    auto [it, inserted] = index_.try_emplace(name, names_.size());
    if (inserted) names_.push_back(name);
    return it->second;
  }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& name(std::size_t id) const {
    if (id >= names_.size()) fail(ErrorKind::Lookup, "vocabulary id out of range: " + std::to_string(id));
    return names_[id];
  }

  std::size_t size() const noexcept { return names_.size(); }
  bool empty() const noexcept { return names_.empty(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  // FNV-1a over the NUL-terminated names, in id order.
  std::uint64_t digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& n : names_) {
      for (unsigned char ch : n) h = (h ^ ch) * 0x100000001b3ULL;
      h = (h ^ 0u) * 0x100000001b3ULL;
    }
    return h;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Observation {
  std::string id;
  SpatioTemporalPoint point;
  bool has_location = true;
  std::size_t category = 0;
  std::optional<std::size_t> photographer;
};

struct Diagnostic {
  std::size_t line = 0;  // 1-based line in the source file
  std::string message;
};

struct Dataset {
  std::vector<Observation> observations;
  Vocabulary categories;
  Vocabulary photographers;
  std::vector<Diagnostic> diagnostics;

  std::vector<SpatioTemporalPoint> locations() const {
    std::vector<SpatioTemporalPoint> out;
    out.reserve(observations.size());
    for (const auto& o : observations) {
      if (o.has_location) out.push_back(o.point);
    }
    return out;
  }
};

enum class FileFormat { Csv, Jsonl };

inline FileFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return ext == ".jsonl" || ext == ".json" ? FileFormat::Jsonl : FileFormat::Csv;
}

struct LoadOptions {
  // Abort when more than this fraction of data lines is rejected.
  double max_bad_fraction = 0.1;
  bool require_category = true;
  // Empty lon/lat marks an observation without location (evaluation input).
  bool allow_missing_location = false;
  // When set, categories must come from this vocabulary.
  const Vocabulary* categories = nullptr;
};

// ---- dates ---------------------------------------------------------------

inline bool is_leap_year(int year) { return (year % 4 == 0 && year % 100 != 0) || year % 400 == 0; }

// (day_of_year - 1) / 365 on a fixed 365-day calendar. Feb 29 sits halfway
// between Feb 28 and Mar 1. Accepts YYYY-MM-DD with an optional time part.
inline double date_to_fraction(std::string_view iso) {
  auto bad = [&]() -> double { fail(ErrorKind::Validation, "invalid date: '" + std::string(iso) + "'"); };
  if (iso.size() < 10 || iso[4] != '-' || iso[7] != '-') return bad();
  if (iso.size() > 10 && iso[10] != 'T' && iso[10] != ' ') return bad();
  auto number = [&](std::size_t pos, std::size_t len) {
    int v = 0;
    const char* first = iso.data() + pos;
    const auto [ptr, ec] = std::from_chars(first, first + len, v);
    if (ec != std::errc() || ptr != first + len) bad();
    return v;
  };
  const int year = number(0, 4);
  const int month = number(5, 2);
  const int day = number(8, 2);
  static constexpr int kDays[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (month < 1 || month > 12 || day < 1) return bad();
  const bool leap_day = month == 2 && day == 29;
  if (leap_day && !is_leap_year(year)) return bad();
  if (!leap_day && day > kDays[month - 1]) return bad();
  int before = 0;
  for (int m = 1; m < month; ++m) before += kDays[m - 1];
  const double index = leap_day ? 58.5 : static_cast<double>(before + day - 1);
  return index / 365.0;
}

// ---- CSV -----------------------------------------------------------------

// Splits one CSV record; double quotes group fields and "" escapes a quote.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

inline std::optional<double> parse_double(std::string_view s) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

// Shortest round-trip decimal form.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

namespace detail {

// Raw string fields of one record, keyed by column.
struct RawRecord {
  std::optional<std::string> id, lon, lat, time, date, category, photographer;
};

class RecordBuilder {
 public:
  RecordBuilder(Dataset& ds, const LoadOptions& opt) : ds_(ds), opt_(opt) {
    if (opt_.categories != nullptr) ds_.categories = *opt_.categories;
  }

  // Returns an error message, or empty on success.
  std::string add(const RawRecord& raw, std::size_t row_index) {
    Observation obs;
    obs.id = raw.id && !raw.id->empty() ? *raw.id : std::to_string(row_index);
    const bool lon_empty = !raw.lon || trim(*raw.lon).empty();
    const bool lat_empty = !raw.lat || trim(*raw.lat).empty();
    if (lon_empty && lat_empty && opt_.allow_missing_location) {
      obs.has_location = false;
    } else {
      if (lon_empty) return "missing lon";
      if (lat_empty) return "missing lat";
      const auto lon = parse_double(*raw.lon);
      const auto lat = parse_double(*raw.lat);
      if (!lon) return "unparseable lon '" + *raw.lon + "'";
      if (!lat) return "unparseable lat '" + *raw.lat + "'";
      if (!std::isfinite(*lon) || *lon < -180.0 || *lon > 180.0) return "lon out of range: " + *raw.lon;
      if (!std::isfinite(*lat) || *lat < -90.0 || *lat > 90.0) return "lat out of range: " + *raw.lat;
      obs.point.lon = *lon;
      obs.point.lat = *lat;
    }
    const bool time_empty = !raw.time || trim(*raw.time).empty();
    const bool date_empty = !raw.date || trim(*raw.date).empty();
    if (!time_empty) {
      const auto t = parse_double(*raw.time);
      if (!t) return "unparseable time '" + *raw.time + "'";
      if (!std::isfinite(*t) || *t < 0.0 || *t > 1.0) return "time out of range [0, 1]: " + *raw.time;
      obs.point.time = *t;
    } else if (!date_empty) {
      try {
        obs.point.time = date_to_fraction(trim(*raw.date));
      } catch (const Error& e) {
        return e.what();
      }
    } else if (obs.has_location) {
      return "missing time";
    }
    const std::string category = raw.category ? trim(*raw.category) : std::string();
    if (category.empty()) {
      if (opt_.require_category) return "missing category";
    } else if (opt_.categories != nullptr) {
      const auto id = opt_.categories->find(category);
      if (!id) fail(ErrorKind::Vocabulary, "unknown category label '" + category + "' (row " +
                                               std::to_string(row_index) + ")");
      obs.category = *id;
    } else {
      obs.category = ds_.categories.add(category);
    }
    const std::string photographer = raw.photographer ? trim(*raw.photographer) : std::string();
    if (!photographer.empty()) obs.photographer = ds_.photographers.add(photographer);
    ds_.observations.push_back(std::move(obs));
    return {};
  }

 private:
  Dataset& ds_;
  const LoadOptions& opt_;
};

inline void check_bad_fraction(const Dataset& ds, std::size_t rows, const LoadOptions& opt) {
  if (rows == 0) return;
  const double frac = static_cast<double>(ds.diagnostics.size()) / static_cast<double>(rows);
  if (frac > opt.max_bad_fraction) {
    std::string first = ds.diagnostics.empty() ? "" : ds.diagnostics.front().message;
    fail(ErrorKind::Schema, std::to_string(ds.diagnostics.size()) + " of " + std::to_string(rows) +
                                " rows rejected (limit " + format_double(opt.max_bad_fraction) +
                                "); first: line " + std::to_string(ds.diagnostics.front().line) + ": " + first);
  }
}

}  // namespace detail

inline Dataset parse_observations_csv(std::istream& in, const LoadOptions& opt = {}) {
  Dataset ds;
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Schema, "empty observation file (no header row)");
  const auto header = split_csv_line(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;
  auto need = [&](const char* name) {
    if (!col.contains(name)) fail(ErrorKind::Schema, std::string("missing required column '") + name + "'");
  };
  need("lon");
  need("lat");
  if (!col.contains("time") && !col.contains("date")) fail(ErrorKind::Schema, "missing required column 'time'");
  if (opt.require_category) need("category");

  detail::RecordBuilder builder(ds, opt);
  std::size_t line_no = 1;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    auto field = [&](const char* name) -> std::optional<std::string> {
      auto it = col.find(name);
      if (it == col.end() || it->second >= fields.size()) return std::nullopt;
      return fields[it->second];
    };
    const std::size_t row_index = rows++;
    if (fields.size() > header.size()) {
      ds.diagnostics.push_back({line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                             std::to_string(fields.size())});
      continue;
    }
    detail::RawRecord raw{field("id"),       field("lon"),      field("lat"),         field("time"),
                          field("date"),     field("category"), field("photographer")};
    if (auto err = builder.add(raw, row_index); !err.empty()) ds.diagnostics.push_back({line_no, err});
  }
  detail::check_bad_fraction(ds, rows, opt);
  return ds;
}

inline Dataset parse_observations_jsonl(std::istream& in, const LoadOptions& opt = {}) {
  Dataset ds;
  detail::RecordBuilder builder(ds, opt);
  std::string line;
  std::size_t line_no = 0;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::size_t row_index = rows++;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      ds.diagnostics.push_back({line_no, std::string("invalid JSON: ") + e.what()});
      continue;
    }
    if (!j.is_object()) {
      ds.diagnostics.push_back({line_no, "expected a JSON object"});
      continue;
    }
    auto field = [&](const char* name) -> std::optional<std::string> {
      if (!j.contains(name) || j[name].is_null()) return std::nullopt;
      const auto& v = j[name];
      if (v.is_string()) return v.get<std::string>();
      if (v.is_number()) return format_double(v.get<double>());
      return v.dump();
    };
    detail::RawRecord raw{field("id"),   field("lon"),      field("lat"),         field("time"),
                          field("date"), field("category"), field("photographer")};
    if (auto err = builder.add(raw, row_index); !err.empty()) ds.diagnostics.push_back({line_no, err});
  }
  detail::check_bad_fraction(ds, rows, opt);
  return ds;
}

inline Dataset load_observations(const std::filesystem::path& path, FileFormat format, const LoadOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open observation file: " + path.string());
  return format == FileFormat::Csv ? parse_observations_csv(in, opt) : parse_observations_jsonl(in, opt);
}

inline void write_observations_csv(std::ostream& out, const Dataset& ds) {
  out << "id,lon,lat,time,category,photographer\n";
  for (const auto& o : ds.observations) {
    out << csv_escape(o.id) << ',';
    if (o.has_location) out << format_double(o.point.lon) << ',' << format_double(o.point.lat);
    else out << ',';
    out << ',' << format_double(o.point.time) << ',' << csv_escape(ds.categories.name(o.category)) << ',';
    if (o.photographer) out << csv_escape(ds.photographers.name(*o.photographer));
    out << '\n';
  }
}

// ---- synthetic world -----------------------------------------------------

// Half-open [start, end) on the year circle; start > end wraps past Dec 31.
struct SeasonWindow {
  double start = 0.0;
  double end = 1.0;

  bool contains(double t) const { return start <= end ? (t >= start && t < end) : (t >= start || t < end); }
  double length() const { return start <= end ? end - start : 1.0 - start + end; }
};

// A spherical cap (center in degrees, radius in radians), optionally seasonal.
struct CategoryRegion {
  std::string name;
  double lon = 0.0;
  double lat = 0.0;
  double radius = 0.1;
  std::optional<SeasonWindow> season;

  bool contains(double lon_deg, double lat_deg) const { return haversine(lon, lat, lon_deg, lat_deg) <= radius; }
  bool contains(const SpatioTemporalPoint& p) const {
    return contains(p.lon, p.lat) && (!season || season->contains(p.time));
  }
};

struct SyntheticWorld {
  std::vector<CategoryRegion> categories;
  std::size_t photographers = 0;
  // Observations go to photographer p with weight exp(-d(x, home_p) / scale);
  // scale <= 0 assigns photographers uniformly.
  double photographer_scale = 0.0;
  std::uint64_t seed = 0;

  // Ground-truth membership oracle.
  bool inside(std::size_t category, const SpatioTemporalPoint& p) const {
    if (category >= categories.size()) fail(ErrorKind::Lookup, "synthetic category out of range");
    return categories[category].contains(p);
  }

  void validate() const {
    if (categories.empty()) fail(ErrorKind::Config, "synthetic world has no categories");
    for (const auto& c : categories) {
      if (!(c.radius > 0.0) || !std::isfinite(c.radius)) {
        fail(ErrorKind::Config, "category '" + c.name + "' has a zero-area region");
      }
      if (c.lon < -180 || c.lon > 180 || c.lat < -90 || c.lat > 90) {
        fail(ErrorKind::Config, "category '" + c.name + "' center out of range");
      }
      if (c.season) {
        const auto& s = *c.season;
        if (s.start < 0 || s.start > 1 || s.end < 0 || s.end > 1 || s.start == s.end) {
          fail(ErrorKind::Config, "category '" + c.name + "' has an empty or invalid season window");
        }
      }
    }
  }
};

// Key-value world description:
//   seed = 7
//   photographers = 12
//   photographer_scale = 0.5
//   category.<name> = <lon> <lat> <radius_rad> [<season_start> <season_end>]
// '#' starts a comment. Categories keep file order.
inline SyntheticWorld parse_world(std::istream& in) {
  SyntheticWorld w;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    auto bad = [&](const std::string& why) {
      fail(ErrorKind::Schema, "world config line " + std::to_string(line_no) + ": " + why);
    };
    if (eq == std::string::npos) bad("expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    std::istringstream value(line.substr(eq + 1));
    if (key == "seed") {
      if (!(value >> w.seed)) bad("bad seed");
    } else if (key == "photographers") {
      if (!(value >> w.photographers)) bad("bad photographer count");
    } else if (key == "photographer_scale") {
      if (!(value >> w.photographer_scale)) bad("bad photographer_scale");
    } else if (key.starts_with("category.")) {
      CategoryRegion c;
      c.name = key.substr(9);
      if (c.name.empty()) bad("empty category name");
      if (!(value >> c.lon >> c.lat >> c.radius)) bad("expected <lon> <lat> <radius>");
      SeasonWindow s;
      if (value >> s.start) {
        if (!(value >> s.end)) bad("season needs start and end");
        c.season = s;
      }
      w.categories.push_back(std::move(c));
    } else {
      bad("unknown key '" + key + "'");
    }
  }
  w.validate();
  return w;
}

inline SyntheticWorld load_world(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open world config: " + path.string());
  return parse_world(in);
}

// Four well separated caps, no seasons; the reference verification world.
inline SyntheticWorld default_world() {
  SyntheticWorld w;
  w.categories = {
      {"alpha", -100.0, 40.0, 0.35, std::nullopt},
      {"beta", 20.0, 50.0, 0.35, std::nullopt},
      {"gamma", 130.0, -25.0, 0.35, std::nullopt},
      {"delta", -60.0, -15.0, 0.35, std::nullopt},
  };
  w.photographers = 8;
  w.photographer_scale = 1.0;
  w.seed = 1;
  return w;
}

// Uniform draw from the cap, exact up to rounding at the rim.
inline SpatioTemporalPoint sample_in_region(const CategoryRegion& region, Rng& rng) {
  const Vec3 c = to_unit_vector(region.lon, region.lat);
  // Any unit vector not parallel to c seeds the tangent basis.
  const Vec3 seed = std::abs(c[2]) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
  Vec3 e1{c[1] * seed[2] - c[2] * seed[1], c[2] * seed[0] - c[0] * seed[2], c[0] * seed[1] - c[1] * seed[0]};
  const double n1 = std::sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]);
  for (double& v : e1) v /= n1;
  const Vec3 e2{c[1] * e1[2] - c[2] * e1[1], c[2] * e1[0] - c[0] * e1[2], c[0] * e1[1] - c[1] * e1[0]};
  for (;;) {
    const double z = 1.0 - rng.uniform() * (1.0 - std::cos(region.radius));
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Vec3 v;
    for (int k = 0; k < 3; ++k) v[k] = z * c[k] + s * (std::cos(phi) * e1[k] + std::sin(phi) * e2[k]);
    SpatioTemporalPoint p;
    from_unit_vector(v, p.lon, p.lat);
    if (!region.contains(p.lon, p.lat)) continue;
    if (region.season) {
      const auto& w = *region.season;
      p.time = w.start + rng.uniform() * w.length();
      if (p.time >= 1.0) p.time -= 1.0;
    } else {
      p.time = rng.uniform();
    }
    return p;
  }
}

// n observations per category. `stream` selects an independent split
// (train / validation / test) of the same world.
inline Dataset generate_synthetic(const SyntheticWorld& world, std::size_t n_per_category, std::uint64_t stream = 0) {
  world.validate();
  Rng root(world.seed);
  Rng home_rng = root.fork(1);
  Rng rng = root.fork(100 + stream);
  std::vector<SpatioTemporalPoint> homes;
  for (std::size_t p = 0; p < world.photographers; ++p) {
    SpatioTemporalPoint h;
    h.lon = home_rng.uniform(-180.0, 180.0);
    h.lat = rad_to_deg(std::asin(home_rng.uniform(-1.0, 1.0)));
    homes.push_back(h);
  }

  Dataset ds;
  for (const auto& c : world.categories) ds.categories.add(c.name);
  for (std::size_t p = 0; p < world.photographers; ++p) ds.photographers.add("ph" + std::to_string(p));

  std::vector<double> weights(world.photographers);
  for (std::size_t c = 0; c < world.categories.size(); ++c) {
    for (std::size_t i = 0; i < n_per_category; ++i) {
      Observation o;
      o.id = "s" + std::to_string(stream) + "_" + std::to_string(ds.observations.size());
      o.point = sample_in_region(world.categories[c], rng);
      o.category = c;
      if (world.photographers > 0) {
        double total = 0.0;
        for (std::size_t p = 0; p < homes.size(); ++p) {
          weights[p] = world.photographer_scale > 0.0
                           ? std::exp(-haversine(o.point, homes[p]) / world.photographer_scale)
                           : 1.0;
          total += weights[p];
        }
        double u = rng.uniform() * total;
        std::size_t chosen = homes.size() - 1;
        for (std::size_t p = 0; p < homes.size(); ++p) {
          if (u < weights[p]) {
            chosen = p;
            break;
          }
          u -= weights[p];
        }
        o.photographer = chosen;
      }
      ds.observations.push_back(std::move(o));
    }
  }
  return ds;
}

}  // namespace geoprior
