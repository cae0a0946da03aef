#pragma once

// Command-line front end. Subcommands:
//
//   phantom   generate a cohort of case directories and a manifest
//   train     fit a model on a cohort, write a checkpoint and history CSV
//   register  run a checkpoint on a pair, write per-hop fields, warps, attention
//   eval      score a registration directory against its case
//   bounds    confidence/uncertainty series and bound certification
//   report    plot-data CSVs and PGM/PPM mid-plane slices
//   loo       leave-one-out training and evaluation over a cohort
//   defaults  print a full default configuration as JSON
//
// Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

#include <ostream>
#include <string>
#include <vector>

namespace vcor {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Registration directory layout.
std::string field_file(int hop);      // dvf_hop<k>.vhdr
std::string warped_file(int hop);     // warped_hop<k>.vhdr
std::string attention_file(int hop);  // attention_hop<k>.csv
inline constexpr const char* kRegistrationManifest = "registration.json";

}  // namespace vcor
