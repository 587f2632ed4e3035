// Copyright (c) the mtac project authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MTAC_FFT_HPP_
#define MTAC_FFT_HPP_

#include <complex>

namespace mtac {

// Unnormalized 2-D complex DFT over an (h, w) plane, row-major.
// sign = -1 is the forward transform, +1 the backward one; the caller is
// responsible for the 1/(h*w) factor on the inverse.
void dft2d(int h, int w, int sign, const std::complex<double>* in,
           std::complex<double>* out);

}  // namespace mtac

#endif  // MTAC_FFT_HPP_
