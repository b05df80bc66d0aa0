#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dmp3dad::cli {

/// Runs one command line (without the program name). Reports and listings
/// go to `out`, diagnostics to `err`. Returns the process exit status.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace dmp3dad::cli
