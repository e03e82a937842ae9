#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "ncadapt/tensor.hpp"

namespace ncadapt {

// "RTI1" | u8 rank | u32 LE extents | f32 LE payload, row-major.
std::vector<std::byte> encode_rti(const Tensor& tensor);
Tensor decode_rti(std::span<const std::byte> bytes);

void write_rti(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_rti(const std::filesystem::path& path);

// Shared little-endian helpers, also used by checkpoints.
void append_f32_le(std::vector<std::byte>& out, std::span<const float> values);
void read_f32_le(std::span<const std::byte> in, std::span<float> out);
std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace ncadapt
