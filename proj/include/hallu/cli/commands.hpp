#pragma once

#include <iosfwd>
#include <vector>

#include "hallu/cli/config.hpp"
#include "hallu/episodes.hpp"
#include "hallu/gradcheck_suite.hpp"
#include "hallu/nn/checkpoint.hpp"

namespace hallu::cli {

enum ExitCode : int { kOk = 0, kOperationalError = 1, kConfigError = 2 };

// Each command validates the whole configuration before touching the
// filesystem. ConfigError propagates (exit 2); other failures are either
// thrown or reported through the return value (exit 1).

int cmd_prepare(const RunConfig& config, std::ostream& out);
int cmd_train(const RunConfig& config, std::ostream& out);
int cmd_eval(const RunConfig& config, std::ostream& out);
/// Train and evaluate with time masks.
int cmd_ablate_time(RunConfig config, std::ostream& out);
int cmd_importance(const RunConfig& config, std::ostream& out);
int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out);

/// Full command line; returns the process exit code.
int run(int argc, char** argv);

// Shared pieces, exposed for tests.
data::DatasetIndex load_index(const RunConfig& config);
fs::path cache_path(const RunConfig& config, const data::ClipEntry& entry);
/// Reads a clip's cache entry, checks its fingerprint and geometry, and
/// standardizes it.
std::vector<float> load_clip(const RunConfig& config, const data::ClipEntry& entry);

nn::Checkpoint make_checkpoint(const RunConfig& config, const ExtractorBank<float>& bank, std::size_t epoch);
/// Refuses checkpoints built for a different backbone or mask setup.
ExtractorBank<float> load_bank(const RunConfig& config, const nn::Checkpoint& ckpt);

}  // namespace hallu::cli
