#pragma once

#include <stdexcept>
#include <string>

namespace robustreid {

// Base of every library error. Each concrete class maps to one documented
// process exit code (see exit_code_for / README).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Configuration / specification errors (exit code 2)
struct InvalidSpec : Error { using Error::Error; };
struct InvalidK : Error { using Error::Error; };
struct InvalidTransfer : Error { using Error::Error; };

// Dataset / batch errors (exit code 3)
struct MalformedName : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };
struct InsufficientIdentities : Error { using Error::Error; };
struct UnknownIdentity : Error { using Error::Error; };
struct GenerationFailed : Error { using Error::Error; };
struct DegenerateBatch : Error { using Error::Error; };
struct MissingAdversarialHalf : Error { using Error::Error; };

// Model / numeric errors (exit code 4)
struct ShapeMismatch : Error { using Error::Error; };
struct MissingContext : Error { using Error::Error; };
struct NonFiniteGradient : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };
struct NoNegativeAvailable : Error { using Error::Error; };
struct NoRelevant : Error { using Error::Error; };
struct NoValidQuery : Error { using Error::Error; };

// Filesystem / report errors (exit code 5)
struct IOFailure : Error { using Error::Error; };
struct MissingReport : Error { using Error::Error; };

inline int exit_code_for(const Error& e) {
    if (dynamic_cast<const InvalidSpec*>(&e) || dynamic_cast<const InvalidK*>(&e) ||
        dynamic_cast<const InvalidTransfer*>(&e))
        return 2;
    if (dynamic_cast<const MalformedName*>(&e) || dynamic_cast<const EmptyDataset*>(&e) ||
        dynamic_cast<const InsufficientIdentities*>(&e) || dynamic_cast<const UnknownIdentity*>(&e) ||
        dynamic_cast<const GenerationFailed*>(&e) || dynamic_cast<const DegenerateBatch*>(&e) ||
        dynamic_cast<const MissingAdversarialHalf*>(&e))
        return 3;
    if (dynamic_cast<const ShapeMismatch*>(&e) || dynamic_cast<const MissingContext*>(&e) ||
        dynamic_cast<const NonFiniteGradient*>(&e) || dynamic_cast<const NonFiniteLoss*>(&e) ||
        dynamic_cast<const NoNegativeAvailable*>(&e) || dynamic_cast<const NoRelevant*>(&e) ||
        dynamic_cast<const NoValidQuery*>(&e))
        return 4;
    if (dynamic_cast<const IOFailure*>(&e) || dynamic_cast<const MissingReport*>(&e))
        return 5;
    return 1;
}

}  // namespace robustreid
