#pragma once

#include <stdexcept>
#include <string>

namespace fp {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define FP_DEFINE_ERROR(Name)                          \
    class Name : public Error {                        \
    public:                                            \
        using Error::Error;                            \
    }

// repr-store
FP_DEFINE_ERROR(ShapeError);
FP_DEFINE_ERROR(DataError);
FP_DEFINE_ERROR(IoError);
FP_DEFINE_ERROR(FormatError);

// probing
FP_DEFINE_ERROR(PolicyError);
FP_DEFINE_ERROR(DegenerateTargetError);
FP_DEFINE_ERROR(SkippedTarget);

// metrics
FP_DEFINE_ERROR(UndefinedEntropyError);
FP_DEFINE_ERROR(DegenerateFitError);

// statistics
FP_DEFINE_ERROR(SampleSizeError);
FP_DEFINE_ERROR(SingularDesignError);
FP_DEFINE_ERROR(IncompleteProfileError);
FP_DEFINE_ERROR(PairingError);

// pipeline
FP_DEFINE_ERROR(StageDependencyError);
FP_DEFINE_ERROR(ConfigError);
FP_DEFINE_ERROR(ValidationFailure);

#undef FP_DEFINE_ERROR

} // namespace fp
