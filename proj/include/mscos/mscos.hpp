#pragma once

#include "mscos/areal.hpp"
#include "mscos/basis.hpp"
#include "mscos/common.hpp"
#include "mscos/evaluate.hpp"
#include "mscos/io.hpp"
#include "mscos/model.hpp"
#include "mscos/predict.hpp"
#include "mscos/rng.hpp"
#include "mscos/sampler.hpp"
#include "mscos/simulate.hpp"
