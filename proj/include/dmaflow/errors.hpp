#pragma once

#include <stdexcept>
#include <string>

namespace dmaflow {

// Bad input data or configuration. The CLI maps these to exit code 1.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Failures that occur while running (I/O, numerical divergence). Exit code 2.
struct RuntimeFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define DMAFLOW_VALIDATION_ERROR(Name)          \
    struct Name : ValidationError {             \
        using ValidationError::ValidationError; \
    }

DMAFLOW_VALIDATION_ERROR(LengthMismatch);
DMAFLOW_VALIDATION_ERROR(ConstantSeries);
DMAFLOW_VALIDATION_ERROR(UnknownZone);
DMAFLOW_VALIDATION_ERROR(WindowTooLarge);
DMAFLOW_VALIDATION_ERROR(EmptyCorrelationSet);
DMAFLOW_VALIDATION_ERROR(EmptyDataset);
DMAFLOW_VALIDATION_ERROR(ShapeMismatch);
DMAFLOW_VALIDATION_ERROR(InvalidConfig);
DMAFLOW_VALIDATION_ERROR(SeriesTooShort);
DMAFLOW_VALIDATION_ERROR(NonFiniteInput);
DMAFLOW_VALIDATION_ERROR(InsufficientHistory);
DMAFLOW_VALIDATION_ERROR(PanelTooShort);
DMAFLOW_VALIDATION_ERROR(MismatchedTargets);
DMAFLOW_VALIDATION_ERROR(MalformedCsv);
DMAFLOW_VALIDATION_ERROR(IrregularCadence);
DMAFLOW_VALIDATION_ERROR(NegativeFlow);
DMAFLOW_VALIDATION_ERROR(GapTooLarge);

#undef DMAFLOW_VALIDATION_ERROR

struct DivergenceDetected : RuntimeFailure {
    using RuntimeFailure::RuntimeFailure;
};

struct IoError : RuntimeFailure {
    using RuntimeFailure::RuntimeFailure;
};

}  // namespace dmaflow
