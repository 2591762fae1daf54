#pragma once

#include <ostream>

namespace umbra::cli {

/// Entry point of the `umbra` tool. Returns 0 on success, 2 on a usage error
/// and 1 on a runtime error; messages go to `err`, results and help to `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace umbra::cli
