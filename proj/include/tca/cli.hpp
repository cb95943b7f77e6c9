#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tca::cli {

// Entry point of the `tca` tool. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// 4,7,10 for a 12-block tower; other depths get the same relative depths.
std::vector<int> default_blocks(std::size_t layers);

std::vector<std::string> split_list(const std::string& s);

}  // namespace tca::cli
