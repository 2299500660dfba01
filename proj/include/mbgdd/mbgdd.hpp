#pragma once

#include "mbgdd/error.hpp"
#include "mbgdd/rng.hpp"
#include "mbgdd/data_model.hpp"
#include "mbgdd/fft.hpp"
#include "mbgdd/operators.hpp"
#include "mbgdd/subspace.hpp"
#include "mbgdd/metrics.hpp"
#include "mbgdd/phantom.hpp"
#include "mbgdd/nn.hpp"
#include "mbgdd/generator.hpp"
#include "mbgdd/gdd.hpp"
#include "mbgdd/vae.hpp"
#include "mbgdd/solvers.hpp"
#include "mbgdd/io.hpp"
#include "mbgdd/pipeline.hpp"
