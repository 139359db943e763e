#include "pocketk/waveform_io.hpp"

#include "pocketk/common.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace pocketk {

namespace {

constexpr char kMagic[8] = {'P', 'K', 'E', 'C', 'G', '1', '\0', '\0'};

void put_u16(std::uint8_t* p, std::uint16_t v) {
    p[0] = static_cast<std::uint8_t>(v);
    p[1] = static_cast<std::uint8_t>(v >> 8);
}

void put_u32(std::uint8_t* p, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint16_t get_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

std::vector<std::uint8_t> encode_waveform(const Waveform& wf) {
    if (wf.fs_hz == 0) throw ParameterError("waveform sampling rate must be positive");
    std::vector<std::uint8_t> out(kWaveformHeaderSize + 4 * wf.samples.size(), 0);
    std::memcpy(out.data(), kMagic, sizeof kMagic);
    put_u16(out.data() + 8, kWaveformVersion);
    put_u32(out.data() + 10, wf.fs_hz);
    put_u32(out.data() + 14, static_cast<std::uint32_t>(wf.samples.size()));
    std::uint8_t* p = out.data() + kWaveformHeaderSize;
    for (const float s : wf.samples) {
        put_u32(p, std::bit_cast<std::uint32_t>(s));
        p += 4;
    }
    return out;
}

Waveform decode_waveform(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kWaveformHeaderSize) {
        throw ParseError("header", "need " + std::to_string(kWaveformHeaderSize) + " bytes, got " +
                                       std::to_string(bytes.size()));
    }
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw ParseError("magic", "expected \"PKECG1\"");
    }
    const std::uint16_t version = get_u16(bytes.data() + 8);
    if (version != kWaveformVersion) {
        throw ParseError("version", "unsupported version " + std::to_string(version));
    }
    Waveform wf;
    wf.fs_hz = get_u32(bytes.data() + 10);
    if (wf.fs_hz == 0) throw ParameterError("fs_hz: sampling rate is zero");
    const std::uint32_t n = get_u32(bytes.data() + 14);
    const std::size_t payload = bytes.size() - kWaveformHeaderSize;
    if (payload != static_cast<std::size_t>(n) * 4) {
        throw ParseError("sample_count", "header declares " + std::to_string(n) + " samples but payload holds " +
                                             std::to_string(payload) + " bytes");
    }
    wf.samples.resize(n);
    const std::uint8_t* p = bytes.data() + kWaveformHeaderSize;
    for (std::uint32_t i = 0; i < n; ++i, p += 4) wf.samples[i] = std::bit_cast<float>(get_u32(p));
    return wf;
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_waveform_file(const std::filesystem::path& path, const Waveform& wf) {
    const auto bytes = encode_waveform(wf);
    write_text_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Waveform read_waveform_file(const std::filesystem::path& path) {
    const auto bytes = read_binary_file(path);
    return decode_waveform(bytes);
}

}  // namespace pocketk
