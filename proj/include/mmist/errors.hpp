#pragma once

#include <stdexcept>
#include <string>

namespace mmist {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Feature-file decoding
struct BadMagic : Error { using Error::Error; };
struct TruncatedPayload : Error { using Error::Error; };
struct NonFiniteValue : Error { using Error::Error; };

// Cohort loading
struct MissingFeatureFile : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct DuplicateInstanceId : Error { using Error::Error; };
struct UnknownModality : Error { using Error::Error; };

// Tabular encoding
struct UnknownLevel : Error { using Error::Error; };

// Networks / training
struct DimMismatch : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };
struct EmptyModality : Error { using Error::Error; };
struct EmptyCohort : Error { using Error::Error; };
struct MissingDependency : Error { using Error::Error; };
struct MissingModel : Error { using Error::Error; };

// Reconstruction
struct MaskMismatch : Error { using Error::Error; };

// Fusion
struct AllMasked : Error { using Error::Error; };

// Synthetic cohort / oracle
struct InvalidConfig : Error { using Error::Error; };
struct SingularCovariance : Error { using Error::Error; };

// Evaluation
struct EmptyInput : Error { using Error::Error; };
struct DegenerateClass : Error { using Error::Error; };
struct InsufficientPoints : Error { using Error::Error; };

} // namespace mmist
