#pragma once

#include "geoprior/baselines.hpp"
#include "geoprior/checkpoint.hpp"
#include "geoprior/data.hpp"
#include "geoprior/embeddings.hpp"
#include "geoprior/encoder.hpp"
#include "geoprior/error.hpp"
#include "geoprior/eval.hpp"
#include "geoprior/geo.hpp"
#include "geoprior/inference.hpp"
#include "geoprior/loss.hpp"
#include "geoprior/model.hpp"
#include "geoprior/numcore.hpp"
#include "geoprior/rng.hpp"
#include "geoprior/trainer.hpp"
