#include "scinet/errors.hpp"

#include <utility>

namespace scinet {

TrainingError::TrainingError(std::string component, const std::string& message)
    : Error(message), component_(std::move(component)) {}

}  // namespace scinet
