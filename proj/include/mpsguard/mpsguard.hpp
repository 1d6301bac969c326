#pragma once

#include "mpsguard/errors.hpp"
#include "mpsguard/rng.hpp"
#include "mpsguard/tensor.hpp"
#include "mpsguard/linalg.hpp"
#include "mpsguard/mps.hpp"
#include "mpsguard/canonical.hpp"
#include "mpsguard/neural.hpp"
#include "mpsguard/data.hpp"
#include "mpsguard/train.hpp"
#include "mpsguard/parallel.hpp"
#include "mpsguard/attack.hpp"
#include "mpsguard/config.hpp"
#include "mpsguard/experiments.hpp"
