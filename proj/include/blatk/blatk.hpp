#pragma once

#include <blatk/bla.hpp>
#include <blatk/detect.hpp>
#include <blatk/error.hpp>
#include <blatk/experiment.hpp>
#include <blatk/fft.hpp>
#include <blatk/io.hpp>
#include <blatk/lpm.hpp>
#include <blatk/oracle.hpp>
#include <blatk/random.hpp>
#include <blatk/signals.hpp>
#include <blatk/spectra.hpp>
#include <blatk/volterra.hpp>
#include <blatk/zoh.hpp>
