// Error hierarchy shared by all vtelim components.

#pragma once

#include <stdexcept>
#include <string>

namespace vtelim {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Graph loading / validation.
struct SchemaError : Error { using Error::Error; };
struct CycleError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct UnknownOperatorError : Error { using Error::Error; };

// Index-map algebra.
struct OutOfBoundsError : Error { using Error::Error; };
struct MissingBaseMapError : Error { using Error::Error; };
struct ComposeLimitError : Error { using Error::Error; };

// Points-to graph validation.
struct ConflictViolationError : Error { using Error::Error; };
struct IncompleteSelectionError : Error { using Error::Error; };
struct CycleDetectedError : Error { using Error::Error; };
struct WriteAliasingError : Error { using Error::Error; };
struct SpaceTooLargeError : Error { using Error::Error; };

// Execution / search.
struct MissingInputError : Error { using Error::Error; };
struct ShapeMismatchError : Error { using Error::Error; };
struct ExecutionError : Error { using Error::Error; };
struct EquivalenceFailureError : Error { using Error::Error; };
struct InvalidVtogError : Error { using Error::Error; };
struct BudgetExceededError : Error { using Error::Error; };

}  // namespace vtelim
