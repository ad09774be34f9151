//! Desk-scale latent video diffusion with independent camera- and
//! object-motion control.
//!
//! A small denoising U-Net over low-resolution RGB "latents" is extended with
//! two adapters: one that injects per-frame camera poses into the temporal
//! transformers, and one that feeds trajectory displacement maps into the
//! encoder convolutions. Training data comes from a procedural renderer with
//! exact motion ground truth, and motion-recovery oracles score generated
//! videos with the CamMC/ObjMC metrics.

pub mod camera;
pub mod diffusion;
pub mod synthdata;
pub mod tensor;
pub mod training;
pub mod trajectory;
pub mod unet;
