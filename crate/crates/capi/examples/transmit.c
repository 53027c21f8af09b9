/* Minimal embedding example: load a trained run directory, push one image
 * through the channel at grid level 2 / 7 dB, and print the PSNR.
 *
 * Build (from the workspace root, after `cargo build -p jscc-capi`):
 *
 *   cc crates/capi/examples/transmit.c -Icrates/capi/include \
 *      target/debug/libjscc_capi.a -lpthread -ldl -lm -o transmit
 *
 *   ./transmit runs/<hash>-adaptive
 */
#include <stdio.h>
#include <stdlib.h>

#include "jscc.h"

static int fail(const char *what) {
  fprintf(stderr, "%s: %s\n", what, jscc_last_error());
  return 1;
}

int main(int argc, char **argv) {
  if (argc != 2) {
    fprintf(stderr, "usage: %s <run-dir>\n", argv[0]);
    return 2;
  }

  jscc_codec_t *codec = NULL;
  if (jscc_codec_open(argv[1], &codec) != JSCC_STATUS_T_OK)
    return fail("open");

  size_t elems = 0;
  jscc_codec_image_elems(codec, &elems);
  float *image = malloc(elems * sizeof(float));
  float *received = malloc(elems * sizeof(float));
  for (size_t i = 0; i < elems; i++)
    image[i] = (float)(i % 256) / 255.0f;

  if (jscc_codec_transmit(codec, image, 1, 2, 7.0, 42, received, elems) !=
      JSCC_STATUS_T_OK)
    return fail("transmit");

  double psnr = 0.0;
  jscc_psnr(image, received, elems, &psnr);
  printf("level 2 @ 7 dB: %.2f dB (capacity budget: %llu bits)\n", psnr,
         (unsigned long long)jscc_capacity_bits(0.125, 3072, 7.0));

  jscc_codec_free(codec);
  free(image);
  free(received);
  return 0;
}
