#pragma once

// Byte-level tokenizer: ids 0..255 are raw bytes, specials live above.
// Encoding ordinary text can never produce a special id, and any byte
// string round-trips exactly (including CJK, which is just UTF-8 bytes).

#include <string>
#include <vector>

namespace singfuse {

struct tokenizer {
    static constexpr int bos = 256;
    static constexpr int eos = 257;
    static constexpr int pad = 258;
    static constexpr int speech_open = 259;   // <speech>
    static constexpr int speech_close = 260;  // </speech>
    static constexpr int role_user = 261;
    static constexpr int role_assistant = 262;
    static constexpr int vocab_size = 263;

    static std::vector<int> encode(const std::string & text) {
        std::vector<int> ids;
        ids.reserve(text.size());
        for (unsigned char c : text) ids.push_back((int)c);
        return ids;
    }

    static std::string decode(const std::vector<int> & ids) {
        std::string out;
        for (int id : ids)
            if (id >= 0 && id < 256) out += (char)(unsigned char)id;
        return out;
    }

    // specials rendered as literal markers, for inspecting sequences
    static std::string decode_with_specials(const std::vector<int> & ids) {
        std::string out;
        for (int id : ids) {
            switch (id) {
                case bos: out += "<bos>"; break;
                case eos: out += "<eos>"; break;
                case pad: out += "<pad>"; break;
                case speech_open: out += "<speech>"; break;
                case speech_close: out += "</speech>"; break;
                case role_user: out += "<user>"; break;
                case role_assistant: out += "<assistant>"; break;
                default:
                    if (id >= 0 && id < 256) out += (char)(unsigned char)id;
            }
        }
        return out;
    }
};

} // namespace singfuse
