#pragma once

#include "retlab/analyze.hpp"
#include "retlab/common.hpp"
#include "retlab/corpus.hpp"
#include "retlab/dense_index.hpp"
#include "retlab/diagnostics.hpp"
#include "retlab/encoder.hpp"
#include "retlab/negatives.hpp"
#include "retlab/sparse.hpp"
#include "retlab/trainer.hpp"
