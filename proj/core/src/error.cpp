#include "rankpose/error.hpp"

namespace rankpose {

DivergenceError::DivergenceError(int epoch, const std::string& what)
    : Error("training diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

}  // namespace rankpose
