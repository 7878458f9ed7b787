#pragma once

#include "rank1/errors.hpp"
#include "rank1/random.hpp"
#include "rank1/tensor.hpp"
#include "rank1/conv.hpp"
#include "rank1/linalg.hpp"
#include "rank1/rank1_filter.hpp"
#include "rank1/parallel.hpp"
#include "rank1/layers.hpp"
#include "rank1/network.hpp"
#include "rank1/data.hpp"
#include "rank1/checkpoint.hpp"
#include "rank1/config.hpp"
#include "rank1/training.hpp"
#include "rank1/hankel.hpp"
#include "rank1/verify.hpp"
