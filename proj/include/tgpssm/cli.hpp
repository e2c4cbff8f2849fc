#pragma once

namespace tgpssm {

// Entry point behind the tgpssm binary. Exit codes: 0 success, 2 bad
// configuration or arguments, 3 numeric failure during a run.
int run(int argc, const char* const* argv);

}  // namespace tgpssm
