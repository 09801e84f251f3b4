#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "empdistill/errors.hpp"
#include "empdistill/llm_gateway.hpp"

namespace empdistill::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitValidation = 2,
  kExitProvider = 3,
  kExitIo = 4,
};

int exit_code_for(ErrorKind kind);

// Seams the tests replace; defaults are the real network and clock.
struct Environment {
  std::shared_ptr<Transport> transport;
  std::shared_ptr<Clock> clock;
};

// Runs one command. `args` excludes the program name. Subcommands: stats,
// partition, distill, evaluate, report.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const Environment& env = {});

// "<UTC yyyymmddThhmmssZ>-<8 hex of the seed hash>"
std::string make_run_id(std::uint64_t seed);

}  // namespace empdistill::cli
