#ifndef CTSURV_CTSURV_HPP
#define CTSURV_CTSURV_HPP

#include "ctsurv/cac.hpp"
#include "ctsurv/combat.hpp"
#include "ctsurv/consensus.hpp"
#include "ctsurv/cox.hpp"
#include "ctsurv/dataio.hpp"
#include "ctsurv/error.hpp"
#include "ctsurv/explain.hpp"
#include "ctsurv/featsel.hpp"
#include "ctsurv/io.hpp"
#include "ctsurv/metrics.hpp"
#include "ctsurv/pipeline.hpp"
#include "ctsurv/random.hpp"
#include "ctsurv/rkn.hpp"
#include "ctsurv/synth.hpp"
#include "ctsurv/tune.hpp"

#endif  // CTSURV_CTSURV_HPP
