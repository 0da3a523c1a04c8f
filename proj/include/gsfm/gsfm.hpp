#pragma once

#include "gsfm/bundle_adjust.hpp"
#include "gsfm/core_geom.hpp"
#include "gsfm/data_assoc.hpp"
#include "gsfm/error.hpp"
#include "gsfm/executor.hpp"
#include "gsfm/five_point.hpp"
#include "gsfm/io.hpp"
#include "gsfm/metrics.hpp"
#include "gsfm/pipeline.hpp"
#include "gsfm/retrieval.hpp"
#include "gsfm/rot_avg.hpp"
#include "gsfm/synth_oracle.hpp"
#include "gsfm/trans_avg.hpp"
#include "gsfm/triangulation.hpp"
#include "gsfm/two_view.hpp"
#include "gsfm/types.hpp"
#include "gsfm/view_graph.hpp"
