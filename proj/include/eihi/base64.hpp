// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace eihi {

// Standard alphabet with padding.
std::string base64_encode(std::string_view bytes);
// nullopt on any malformed input (bad length, alphabet or padding).
std::optional<std::string> base64_decode(std::string_view text);

}  // namespace eihi
