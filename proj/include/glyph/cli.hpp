#pragma once

#include <string>
#include <vector>

namespace glyph::cli {

/// Entry point behind main(). Subcommands: vocab build, pretrain, inject,
/// eval, scan, report. Returns 0 on success, 1 on usage errors, 2 on runtime
/// errors.
int cli_dispatch(const std::vector<std::string>& args);

}  // namespace glyph::cli
