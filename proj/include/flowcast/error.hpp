// Copyright 2026 The flowcast Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FLOWCAST__ERROR_HPP_
#define FLOWCAST__ERROR_HPP_

#include <stdexcept>
#include <string>

namespace flowcast
{

/// Shape, axis, or argument contract violated by the caller.
class ShapeError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or a diverged optimisation.
class NumericalError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read, or written.
class IoError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Persisted data does not match the expected schema or version.
class SchemaError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

}  // namespace flowcast

#endif  // FLOWCAST__ERROR_HPP_
