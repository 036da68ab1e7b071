#pragma once

// Everything in one include.
#include "trajektor/binning.hpp"
#include "trajektor/corpus.hpp"
#include "trajektor/lmm.hpp"
#include "trajektor/metrics.hpp"
#include "trajektor/pipeline.hpp"
#include "trajektor/stats.hpp"
#include "trajektor/synth.hpp"
#include "trajektor/typing.hpp"
