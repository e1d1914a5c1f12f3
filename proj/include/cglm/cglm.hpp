#pragma once

#include "cglm/clipping.hpp"
#include "cglm/expfam.hpp"
#include "cglm/harness.hpp"
#include "cglm/icgeom.hpp"
#include "cglm/model.hpp"
#include "cglm/posterior.hpp"
#include "cglm/prior.hpp"
#include "cglm/report_io.hpp"
