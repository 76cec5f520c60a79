#pragma once

#include <filesystem>
#include <string>

namespace difflab::harness {

/// Long-format table series,step,value gathered from a run directory: one series
/// per metrics.csv column, plus ua_curve.csv (ua.g and ua.f.m<bins>, step = input x)
/// and reliability.csv (reliability.accuracy and reliability.confidence, step = bin
/// centre) when present. A missing directory or metrics.csv raises ConfigError.
std::string export_run(const std::filesystem::path& run_dir);

}  // namespace difflab::harness
