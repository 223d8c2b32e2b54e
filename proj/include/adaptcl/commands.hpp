#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace adaptcl {

// Exit codes: 0 success, 1 runtime failure, 2 configuration/validation
// failure. All commands report errors on stderr.

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              std::uint64_t seed, const std::string& out_dir, bool emit_json);

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& axis, const std::string& grid, std::uint64_t seed,
              const std::string& out_dir, bool emit_json);

int cmd_gradcheck(const std::string& dims, double tol, double tol32);

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& format, bool force);

// Sweep worker cap: ADAPTCL_THREADS when set, otherwise the hardware count.
std::size_t sweep_threads();

} // namespace adaptcl
