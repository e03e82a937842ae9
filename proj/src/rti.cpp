#include "ncadapt/rti.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ncadapt/errors.hpp"

namespace ncadapt {

namespace {

constexpr char kMagic[4] = {'R', 'T', 'I', '1'};

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::span<const std::byte> in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[i]) << (8 * i);
  return v;
}

}  // namespace

void append_f32_le(std::vector<std::byte>& out, std::span<const float> values) {
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

void read_f32_le(std::span<const std::byte> in, std::span<float> out) {
  if (in.size() != 4 * out.size()) throw DataError("float payload has the wrong length");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<float>(get_u32(in.subspan(4 * i, 4)));
}

std::vector<std::byte> encode_rti(const Tensor& tensor) {
  if (tensor.empty()) throw UsageError("cannot encode an empty tensor");
  if (!tensor.all_finite()) throw NumericError("refusing to write non-finite values to RTI");
  if (tensor.rank() > 255) throw UsageError("RTI rank must fit in a byte");
  std::vector<std::byte> out;
  out.reserve(5 + 4 * tensor.rank() + 4 * tensor.size());
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  out.push_back(static_cast<std::byte>(tensor.rank()));
  for (std::size_t e : tensor.shape()) {
    if (e > 0xFFFFFFFFull) throw UsageError("RTI extent does not fit in u32");
    put_u32(out, static_cast<std::uint32_t>(e));
  }
  append_f32_le(out, tensor.data());
  return out;
}

Tensor decode_rti(std::span<const std::byte> bytes) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw DataError("RTI: bad magic");
  const std::size_t rank = static_cast<std::size_t>(bytes[4]);
  if (rank == 0) throw DataError("RTI: rank must be >= 1");
  if (bytes.size() < 5 + 4 * rank) throw DataError("RTI: truncated header");
  Shape shape(rank);
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = get_u32(bytes.subspan(5 + 4 * i, 4));
    if (shape[i] == 0) throw DataError("RTI: zero extent");
    n *= shape[i];
  }
  const auto payload = bytes.subspan(5 + 4 * rank);
  if (payload.size() != 4 * n) throw DataError("RTI: payload length does not match the extents");
  std::vector<float> values(n);
  read_f32_le(payload, values);
  return Tensor::from_values(shape, std::move(values));
}

std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void write_rti(const std::filesystem::path& path, const Tensor& tensor) { write_file(path, encode_rti(tensor)); }

Tensor read_rti(const std::filesystem::path& path) { return decode_rti(read_file(path)); }

}  // namespace ncadapt
