/**
 * The four frozen backbone configurations this adapter knows how to
 * export, all ViT-B/16 shaped (768-dim token width).
 *
 * Pooling rule: the CLS token where the checkpoint defines one,
 * otherwise the mean over patch tokens. Both the pooling choice and
 * the preprocessing recipe are artifact decisions recorded in the
 * metadata sidecar written next to every embeddings CSV.
 */

export type PoolingRule = "cls" | "mean_patches";

export interface EncoderSpec {
  /** stable key used on the command line and in downstream configs */
  key: string;
  /** upstream checkpoint identifier this configuration mirrors */
  checkpoint: string;
  /** embedding width; all four backbones are ViT-B/16 */
  dim: number;
  pooling: PoolingRule;
  /** resize / crop / normalization recipe applied before the backbone */
  preprocessing: string;
}

export const EMBEDDING_DIM = 768;

const IMAGENET_RECIPE =
  "resize shorter side to 256, center-crop 224x224, normalize with ImageNet mean/std";
const SIGLIP_RECIPE = "resize to 224x224, scale pixels to [-1, 1]";

export const ENCODERS: readonly EncoderSpec[] = [
  {
    key: "supervised_vit",
    checkpoint: "vit-base-patch16-224 (ImageNet-1k supervised)",
    dim: EMBEDDING_DIM,
    pooling: "cls",
    preprocessing: IMAGENET_RECIPE,
  },
  {
    key: "siglip2",
    checkpoint: "siglip2-base-patch16-224",
    dim: EMBEDDING_DIM,
    pooling: "mean_patches",
    preprocessing: SIGLIP_RECIPE,
  },
  {
    key: "mae",
    checkpoint: "vit-mae-base",
    dim: EMBEDDING_DIM,
    pooling: "cls",
    preprocessing: IMAGENET_RECIPE,
  },
  {
    key: "dinov3",
    checkpoint: "dinov3-vitb16",
    dim: EMBEDDING_DIM,
    pooling: "cls",
    preprocessing: IMAGENET_RECIPE,
  },
];

export function encoderByKey(key: string): EncoderSpec {
  const spec = ENCODERS.find((e) => e.key === key);
  if (!spec) {
    const known = ENCODERS.map((e) => e.key).join(", ");
    throw new Error(`unknown encoder key '${key}'; expected one of: ${known}`);
  }
  return spec;
}
