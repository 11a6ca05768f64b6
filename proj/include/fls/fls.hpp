#pragma once

#include "bench.hpp"
#include "core.hpp"
#include "ctc.hpp"
#include "ctc_decoder.hpp"
#include "frameio.hpp"
#include "fusion.hpp"
#include "metrics.hpp"
#include "oracle.hpp"
#include "parallel.hpp"
#include "pipeline.hpp"
#include "random.hpp"
