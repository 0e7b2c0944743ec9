#pragma once

#include <string>
#include <vector>

namespace duoseg {

// Command-line entry point. Exit codes: 0 success, 1 usage error, 2 runtime
// error. Subcommands: gen-data, train, eval, ablate, gradcheck,
// viz-features, overlay.
int dispatch(const std::vector<std::string>& args);
int dispatch(int argc, const char* const* argv);

struct SmokeReport {
    bool ok = false;
    std::string failed_stage;  // stage name when !ok
    std::string message;
};

// End-to-end probe in tmp_dir: generate a small dataset, train the full
// variant briefly, evaluate the test split, export feature maps and an
// overlay; verifies every artifact exists and parses.
SmokeReport smoke_pipeline(const std::string& tmp_dir);

}  // namespace duoseg
