#pragma once

#include "gaussurp/analysis.hpp"
#include "gaussurp/density.hpp"
#include "gaussurp/embedding_store.hpp"
#include "gaussurp/error.hpp"
#include "gaussurp/evaluation.hpp"
#include "gaussurp/scoring.hpp"
