#pragma once

namespace dmaflow::parallel {

// Runs the OpenMP code paths when true (the default). The serial reference
// paths produce bit-identical results; they are kept for testing and for the
// serial-vs-parallel benchmark.
void set_enabled(bool on);
bool enabled();

int max_threads();

}  // namespace dmaflow::parallel
