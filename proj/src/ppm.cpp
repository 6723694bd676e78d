#include "ffpdet/image.hpp"

#include <cstdio>
#include <fstream>

namespace ffpdet {

namespace {

// PNM header token reader: skips whitespace and '#' comment lines.
int64_t read_pnm_int(std::istream& in, const std::string& path) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  require<DataError>(c != EOF && std::isdigit(c),
                     "malformed header in " + path);
  int64_t v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = in.get();
  }
  return v;
}

}  // namespace

void write_ppm(const ImageU8& img, const std::string& path) {
  require<Error>((int64_t)img.data.size() == 3 * img.width * img.height,
                 "image buffer size does not match its dimensions");
  std::ofstream out(path, std::ios::binary);
  require<IoError>(out.good(), "cannot open for writing: " + path);
  out << "P6\n"
      << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            (std::streamsize)img.data.size());
  require<IoError>(out.good(), "write failed: " + path);
}

ImageU8 read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require<IoError>(in.good(), "cannot open: " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  require<DataError>(in.good() && magic[0] == 'P' && magic[1] == '6',
                     "not a binary PPM (P6) file: " + path);
  ImageU8 img;
  img.width = read_pnm_int(in, path);
  img.height = read_pnm_int(in, path);
  const int64_t maxval = read_pnm_int(in, path);
  require<DataError>(img.width > 0 && img.height > 0 && maxval == 255,
                     "unsupported PPM geometry or depth in " + path);
  img.data.resize(3 * img.width * img.height);
  in.read(reinterpret_cast<char*>(img.data.data()),
          (std::streamsize)img.data.size());
  require<DataError>(in.gcount() == (std::streamsize)img.data.size(),
                     "truncated image file: " + path);
  return img;
}

void write_pgm(const uint8_t* data, int64_t width, int64_t height,
               const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require<IoError>(out.good(), "cannot open for writing: " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(data),
            (std::streamsize)(width * height));
  require<IoError>(out.good(), "write failed: " + path);
}

}  // namespace ffpdet
