#pragma once

#include "dissector/analysis.hpp"
#include "dissector/bitmask.hpp"
#include "dissector/formula.hpp"
#include "dissector/heuristics.hpp"
#include "dissector/interchange.hpp"
#include "dissector/metrics.hpp"
#include "dissector/parallel.hpp"
#include "dissector/rational.hpp"
#include "dissector/search.hpp"
#include "dissector/synthetic.hpp"
#include "dissector/thresholds.hpp"
