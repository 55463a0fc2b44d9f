#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace skelfuse::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Runs one subcommand. `args` excludes the program name. Reports go to `out`, diagnostics to
/// `err`; the return value is the process exit code.
///
///   gen-synthetic    data/ (skeleton text files, split.json)
///   train-skeleton   skeleton.ckpt, metrics_skeleton.jsonl
///   build-stroi      stroi.ckpt, stroi_preview/*.png
///   extract-weights  weights.ckpt, weighted_preview/*.png
///   train-rgb        rgb_<mode>.ckpt, metrics_rgb_<mode>.jsonl
///   evaluate         evaluation.json
///   ensemble         report.txt, predictions.jsonl
///   grad-check       per-operation gradient errors
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace skelfuse::cli
