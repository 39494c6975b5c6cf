#pragma once

// `textcam` command-line front end. Subcommands:
//
//   channel-semantics  reference bundle -> channel direction table
//   explain            image bundle -> saliency.png, phrases.json, solution.json
//   group              image bundle -> group_<k>_<phrase>.png, groups.json
//   eval               labelled feature bundle -> report.json
//   synth-clevr        writes a synthetic biased shape/color corpus as bundles

#include <iosfwd>
#include <string>
#include <vector>

#include "textcam/error.hpp"

namespace textcam::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitMissingInput = 2;
inline constexpr int kExitShapeMismatch = 3;
inline constexpr int kExitInvariant = 4;
inline constexpr int kExitIo = 5;

int exit_code_for(ErrorCode code) noexcept;

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace textcam::cli
