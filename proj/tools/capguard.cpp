#include "capguard/pipeline.hpp"

int main(int argc, char** argv) {
  return capguard::pipeline::run(argc, argv);
}
