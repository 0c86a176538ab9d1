#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ace/tensor/optim.hpp"

ACE_NAMESPACE_BEGIN

/// Named-tensor container: "ACECKP01", u32 tensor count, then per tensor
/// u16 name length, UTF-8 name, u8 rank, rank x u32 dims, f32 LE payload.
struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

inline constexpr char kContainerMagic[8] = {'A', 'C', 'E', 'C', 'K', 'P', '0', '1'};

void write_container(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
/// Throws FormatError on bad magic, truncation or trailing bytes.
std::vector<NamedTensor> read_container(const std::filesystem::path& path);

std::vector<NamedTensor> export_parameters(const ParameterStore& store, const std::string& prefix = "");
/// Every parameter in the store must be present with a matching shape.
void import_parameters(const std::vector<NamedTensor>& tensors, ParameterStore& store, const std::string& prefix = "");

ACE_NAMESPACE_END
