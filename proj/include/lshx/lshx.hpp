#pragma once

// Umbrella header.

#include "lshx/bench.hpp"
#include "lshx/bptree.hpp"
#include "lshx/c2lsh.hpp"
#include "lshx/dataset.hpp"
#include "lshx/error.hpp"
#include "lshx/external_sort.hpp"
#include "lshx/ilsh.hpp"
#include "lshx/index.hpp"
#include "lshx/index_common.hpp"
#include "lshx/log.hpp"
#include "lshx/lsh_math.hpp"
#include "lshx/qalsh.hpp"
#include "lshx/random.hpp"
#include "lshx/storage.hpp"
