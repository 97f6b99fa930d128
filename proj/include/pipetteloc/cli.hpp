#pragma once

#include <string>
#include <vector>

namespace pipetteloc {

// Runs one subcommand of {synth, train-gan, enhance, train, eval, bench,
// infer, ablate}. argv includes the program name. Returns the process exit
// code: 0 on success, nonzero with a diagnostic on stderr otherwise.
int dispatch(const std::vector<std::string>& argv);

}  // namespace pipetteloc
