#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "gridflow/sweep.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCellFailure = 1;
constexpr int kExitConfigError = 2;
constexpr int kExitIoError = 3;

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);

  gridflow::ParseOutcome outcome;
  try {
    outcome = gridflow::parse_config(args);
  } catch (const gridflow::IoError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitIoError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitConfigError;
  }
  if (outcome.help) {
    std::cout << outcome.help_text;
    return kExitOk;
  }

  std::vector<gridflow::CellResult> results;
  try {
    results = gridflow::run_experiment(outcome.matrix);
    gridflow::write_outputs(outcome.matrix, results);
  } catch (const gridflow::IoError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitIoError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitConfigError;
  }

  int failed = 0;
  for (const gridflow::CellResult& result : results)
    if (result.failed) ++failed;
  if (failed > 0) {
    std::cerr << failed << " of " << results.size() << " cells failed\n";
    return kExitCellFailure;
  }
  std::cerr << "wrote " << outcome.matrix.out_dir << " (" << results.size()
            << " cells)\n";
  return kExitOk;
}
