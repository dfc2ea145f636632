#pragma once

#include "heatsvc/config.hpp"
#include "heatsvc/csv.hpp"
#include "heatsvc/dates.hpp"
#include "heatsvc/error.hpp"
#include "heatsvc/gmrf.hpp"
#include "heatsvc/graph.hpp"
#include "heatsvc/ingest.hpp"
#include "heatsvc/laplace.hpp"
#include "heatsvc/latent_model.hpp"
#include "heatsvc/mcmc.hpp"
#include "heatsvc/metrics.hpp"
#include "heatsvc/modifier_records.hpp"
#include "heatsvc/modifiers.hpp"
#include "heatsvc/pc_prior.hpp"
#include "heatsvc/pipeline.hpp"
#include "heatsvc/report.hpp"
#include "heatsvc/simulator.hpp"
#include "heatsvc/spline.hpp"
