#pragma once

#include "forge/kernel.hpp"
#include "forge/util.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace forge {

struct CliOutcome {
    int exit_code = 0;  // 0 success, 1 domain error, 2 usage error
    std::string out;
    std::string err;
};

// Operator command line. The kernel is built on the first dispatch from the
// global flags and kept for later calls on the same object.
class Cli {
public:
    Cli() = default;
    ~Cli();
    Cli(const Cli&) = delete;
    Cli& operator=(const Cli&) = delete;

    // |args| excludes the program name.
    CliOutcome dispatch(const std::vector<std::string>& args);

    Kernel* kernel() noexcept { return kernel_.get(); }

private:
    struct Globals {
        std::string config;
        std::string registry;
        std::string workspace;
        std::string ltm;
        std::string sandbox_root;
    };

    Kernel& ensure_kernel(const Globals& g);
    std::string register_transcript(const std::string& file, const std::string& preferred_id);

    std::unique_ptr<Kernel> kernel_;
    std::vector<fs::path> scratch_dirs_;
    std::size_t transcript_counter_ = 0;
};

}  // namespace forge
