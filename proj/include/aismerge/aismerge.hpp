#pragma once

#include "aismerge/ais.hpp"
#include "aismerge/dataset.hpp"
#include "aismerge/config.hpp"
#include "aismerge/dynamics.hpp"
#include "aismerge/errors.hpp"
#include "aismerge/evaluation.hpp"
#include "aismerge/human_driver.hpp"
#include "aismerge/mpc.hpp"
#include "aismerge/nn.hpp"
#include "aismerge/oracle.hpp"
#include "aismerge/random.hpp"
#include "aismerge/simulation.hpp"
#include "aismerge/training.hpp"
