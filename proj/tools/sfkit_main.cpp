#include <cstdio>

int main() {
  std::puts("sfkit: pipeline CLI not wired up yet");
  return 1;
}
