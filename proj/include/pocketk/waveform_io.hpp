#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace pocketk {

// PKECG1 wire format, shared by cohort files and the handheld path.
//
//   offset  size  field
//   0       8     magic "PKECG1\0\0"
//   8       2     u16 version (1)
//   10      4     u32 sampling rate, Hz
//   14      4     u32 sample count
//   18      14    reserved, zero
//   32      4*n   little-endian IEEE-754 float32 samples, millivolts
inline constexpr std::size_t kWaveformHeaderSize = 32;
inline constexpr std::uint16_t kWaveformVersion = 1;

struct Waveform {
    std::uint32_t fs_hz = 0;
    std::vector<float> samples;

    double duration_seconds() const {
        return fs_hz == 0 ? 0.0 : static_cast<double>(samples.size()) / fs_hz;
    }
    bool operator==(const Waveform&) const = default;
};

std::vector<std::uint8_t> encode_waveform(const Waveform& wf);

/// Throws ParseError naming the field ("magic", "version", "sample_count")
/// or ParameterError for a zero sampling rate.
Waveform decode_waveform(std::span<const std::uint8_t> bytes);

void write_waveform_file(const std::filesystem::path& path, const Waveform& wf);
Waveform read_waveform_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);

}  // namespace pocketk
