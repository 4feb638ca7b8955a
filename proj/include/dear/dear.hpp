#pragma once

#include "dear/checkpoint.hpp"
#include "dear/dataset.hpp"
#include "dear/deq.hpp"
#include "dear/graph.hpp"
#include "dear/model.hpp"
#include "dear/oracles.hpp"
#include "dear/rng.hpp"
#include "dear/selftest.hpp"
#include "dear/solver.hpp"
#include "dear/tape.hpp"
#include "dear/tensor.hpp"
#include "dear/train.hpp"
