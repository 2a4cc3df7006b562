#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace srcbias::cli {

/// Runs one command line (without the program name). Returns 0 on success,
/// 1 for usage or input errors, 2 for internal failures.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

}  // namespace srcbias::cli
