#pragma once

#include "splitgp/errors.hpp"
#include "splitgp/kv.hpp"
#include "splitgp/kernel.hpp"
#include "splitgp/gp_core.hpp"
#include "splitgp/partitioner.hpp"
#include "splitgp/training.hpp"
#include "splitgp/splitting_model.hpp"
#include "splitgp/baselines.hpp"
#include "splitgp/data_io.hpp"
#include "splitgp/bench.hpp"
