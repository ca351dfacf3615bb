#pragma once
// Command-line front end. `run` is the whole program minus process exit,
// so tests can drive it in-process.

#include <iosfwd>
#include <string>
#include <vector>

namespace dissector::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kFormatError = 3, kRuntimeError = 4 };

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// "0-9,12" -> {0..9, 12}; "all" -> every index below n. Sorted, unique.
std::vector<std::size_t> parse_neuron_range(const std::string& text, std::size_t n);

}  // namespace dissector::cli
