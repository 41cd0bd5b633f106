#pragma once

// The `scinet` command line: train, stylize, verify, grid.
//
// Exit codes: 0 success, 1 internal failure (including failed verification
// checks), 2 usage or configuration error.

#include <torch/torch.h>

#include <iosfwd>
#include <vector>

namespace scinet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Environment variable naming the directory whose final.ckpt is used when
// --checkpoint is omitted.
inline constexpr const char* kCheckpointDirEnv = "SCINET_CHECKPOINT_DIR";

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// rows[i][j] is the (1, 3, h, w) tile for row i, column j; all tiles share a
// size. The sheet is white, (m*h + (m-1)*gutter) x (n*w + (n-1)*gutter).
torch::Tensor contact_sheet(const std::vector<std::vector<torch::Tensor>>& rows, int64_t gutter);

}  // namespace scinet::cli
