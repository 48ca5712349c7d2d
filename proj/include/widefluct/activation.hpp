// Copyright 2026 The widefluct Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef WIDEFLUCT_ACTIVATION_HPP
#define WIDEFLUCT_ACTIVATION_HPP

#include <cmath>
#include <string>

#include "widefluct/common.hpp"

namespace wf {

enum class Activation { kLinear, kRelu, kTanh };

inline Activation activation_from_string(const std::string& s) {
  if (s == "linear") return Activation::kLinear;
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw ContractError("unknown activation: " + s);
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
  }
  return "?";
}

// phi(0)=0 for all three, and relu uses the Theta(0)=0 subgradient.
inline double act(Activation a, double x) {
  switch (a) {
    case Activation::kLinear: return x;
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kTanh: return std::tanh(x);
  }
  return x;
}

inline double act_d1(Activation a, double x) {
  switch (a) {
    case Activation::kLinear: return 1.0;
    case Activation::kRelu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh: {
      double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

inline double act_d2(Activation a, double x) {
  switch (a) {
    case Activation::kLinear: return 0.0;
    case Activation::kRelu: return 0.0;
    case Activation::kTanh: {
      double t = std::tanh(x);
      return -2.0 * t * (1.0 - t * t);
    }
  }
  return 0.0;
}

}  // namespace wf

#endif  // WIDEFLUCT_ACTIVATION_HPP
